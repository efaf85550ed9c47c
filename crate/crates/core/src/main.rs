fn main() {
    std::process::exit(cqd::cli::run(std::env::args_os()));
}
