fn main() {
    std::process::exit(vgt::cli::run(std::env::args_os()));
}
