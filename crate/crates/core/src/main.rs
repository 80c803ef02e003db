fn main() {
    std::process::exit(ircn_core::cli::run(std::env::args_os()));
}
