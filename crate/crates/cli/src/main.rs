fn main() {
    std::process::exit(qdqn_cli::parse_and_run(std::env::args_os()));
}
