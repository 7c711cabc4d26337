fn main() {
    std::process::exit(mvsve_cli::run_from(std::env::args_os()));
}
