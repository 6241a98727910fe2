fn main() {
    std::process::exit(ctxattr::cli::main());
}
