fn main() {
    std::process::exit(fluorosynth_cli::run(std::env::args_os()));
}
