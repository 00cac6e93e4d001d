fn main() {
    std::process::exit(deci::cli::run(std::env::args_os()));
}
