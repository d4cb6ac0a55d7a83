fn main() {
    std::process::exit(hfrac::cli::run(std::env::args_os()));
}
