fn main() {
    std::process::exit(sagnac_cli::run_command(std::env::args_os()));
}
