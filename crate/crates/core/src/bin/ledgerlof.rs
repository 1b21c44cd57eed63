fn main() {
    std::process::exit(ledgerlof::cli::run(std::env::args_os()));
}
