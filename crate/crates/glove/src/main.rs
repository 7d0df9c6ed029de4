fn main() {
    std::process::exit(glove::cli::run_cli(std::env::args_os()));
}
