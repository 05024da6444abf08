fn main() {
    std::process::exit(dp2vae_cli::run(std::env::args_os()));
}
