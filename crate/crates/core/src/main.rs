fn main() {
    std::process::exit(grabar::cli::dispatch(std::env::args_os()));
}
