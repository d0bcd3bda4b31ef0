fn main() {
    std::process::exit(dub3d::cli::dispatch(std::env::args_os()));
}
