fn main() {
    std::process::exit(shadowheight_cli::run(std::env::args_os()));
}
