fn main() {
    std::process::exit(mcenet_cli::run_cli(std::env::args_os()));
}
