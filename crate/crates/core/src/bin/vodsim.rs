fn main() {
    std::process::exit(vodsim::cli::cli_main(std::env::args_os()));
}
