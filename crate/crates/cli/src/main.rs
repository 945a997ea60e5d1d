fn main() {
    std::process::exit(agla_cli::run_cli(std::env::args_os()));
}
