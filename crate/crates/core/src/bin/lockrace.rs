fn main() {
    std::process::exit(lockrace::cli::run(std::env::args_os()));
}
