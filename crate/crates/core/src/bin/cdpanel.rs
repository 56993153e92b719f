fn main() {
    std::process::exit(cdpanel::cli::run(std::env::args_os()));
}
