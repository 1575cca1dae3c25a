fn main() {
    std::process::exit(hywass::cli::run(std::env::args_os()));
}
