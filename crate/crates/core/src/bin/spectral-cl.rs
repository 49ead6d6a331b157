fn main() {
    std::process::exit(spectral_cl::cli::cli_run(std::env::args_os()));
}
