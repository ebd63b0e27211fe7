use clap::CommandFactory;
use ner_cli::Cli;

fn subcommands() -> Vec<(String, Vec<String>, String)> {
    let mut root = Cli::command();
    root.build();
    root.get_subcommands_mut()
        .filter(|sub| sub.get_name() != "help")
        .map(|sub| {
            let flags = sub.get_arguments().filter_map(|a| a.get_long().map(|l| format!("--{l}"))).filter(|f| f != "--help" && f != "--version").collect();
            (sub.get_name().to_string(), flags, sub.render_long_help().to_string())
        })
        .collect()
}

#[test]
fn every_flag_is_in_its_help() {
    for (name, flags, help) in subcommands() {
        assert!(!flags.is_empty(), "{name} has no flags");
        for f in flags {
            assert!(help.contains(&f), "{name} help lacks {f}");
        }
    }
}

#[test]
fn every_subcommand_and_flag_is_in_the_readme() {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    for (name, flags, _) in subcommands() {
        let section = format!("### `ner {name}`");
        let start = readme.find(&section).unwrap_or_else(|| panic!("README lacks {section}"));
        let body = &readme[start + section.len()..];
        let body = &body[..body.find("\n### ").unwrap_or(body.len())];
        for f in flags {
            assert!(body.contains(&format!("`{f}")), "README section for {name} lacks {f}");
        }
    }
}
