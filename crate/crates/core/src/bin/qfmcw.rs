fn main() {
    std::process::exit(qfmcw::cli::run(std::env::args_os()));
}
