fn main() {
    std::process::exit(multiphase::cli::run(std::env::args_os()));
}
