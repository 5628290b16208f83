fn main() {
    std::process::exit(ordinal_noise::cli::cli_main(std::env::args_os()));
}
