fn main() {
    std::process::exit(kdmc::cli::run(std::env::args_os()));
}
