fn main() {
    std::process::exit(learned_cdp::cli::run(std::env::args_os()));
}
