fn main() {
    std::process::exit(rcn::cli::run(std::env::args_os()));
}
