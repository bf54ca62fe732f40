fn main() {
    std::process::exit(taskcast::cli::dispatch(std::env::args_os()));
}
