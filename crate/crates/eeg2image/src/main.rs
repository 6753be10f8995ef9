fn main() {
    std::process::exit(eeg2image::cli::run(std::env::args_os()));
}
