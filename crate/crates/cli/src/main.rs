fn main() {
    std::process::exit(openchain_cli::run_cli(std::env::args_os()));
}
