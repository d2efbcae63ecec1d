fn main() {
    std::process::exit(quadgroup::cli::run_from(std::env::args_os()));
}
