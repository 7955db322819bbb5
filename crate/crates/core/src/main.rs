fn main() {
    std::process::exit(scenegen::cli::run(std::env::args_os()));
}
