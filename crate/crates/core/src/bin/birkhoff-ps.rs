fn main() {
    std::process::exit(birkhoff_ps::cli::run(std::env::args_os()));
}
