fn main() {
    std::process::exit(qbnet_cli::run_cli(std::env::args_os()));
}
