fn main() {
    std::process::exit(aoirisk_cli::run_with_args(std::env::args_os()));
}
