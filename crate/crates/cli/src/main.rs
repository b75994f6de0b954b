fn main() {
    std::process::exit(gomoku_cli::run_cli(std::env::args_os().collect()));
}
