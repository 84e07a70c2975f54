fn main() {
    todo!("wire subcommands once the core crate lands");
}
