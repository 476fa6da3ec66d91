fn main() {
    std::process::exit(homeostat::cli::run_cli(std::env::args_os()));
}
