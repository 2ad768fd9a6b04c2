fn main() {
    std::process::exit(kalm_cli::run_command(std::env::args_os()));
}
