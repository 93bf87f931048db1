fn main() {
    std::process::exit(treetrack::cli::main_with_args(std::env::args()));
}
