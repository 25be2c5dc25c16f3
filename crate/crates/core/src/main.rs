fn main() {
    std::process::exit(modelpick::cli::run(std::env::args_os()));
}
