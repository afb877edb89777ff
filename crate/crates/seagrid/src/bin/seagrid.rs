fn main() {
    std::process::exit(seagrid::cli::run(std::env::args_os()));
}
