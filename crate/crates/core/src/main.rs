fn main() {
    std::process::exit(crossmodal::cli::run(std::env::args_os()));
}
