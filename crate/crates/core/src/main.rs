fn main() {
    std::process::exit(modsel::harness::cli::run(std::env::args_os()));
}
