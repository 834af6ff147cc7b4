//! The lists shipped under `data/` parse and have the expected shape.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::PathBuf;

use audit_core::bias::{read_group_mapping, GroupName};
use audit_core::screening::{load_watchlist, read_term_list};

fn data(name: &str) -> File {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name);
    File::open(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn akc_mapping_covers_the_dog_classes() {
    let mapping = read_group_mapping(data("akc_groups.csv")).unwrap();
    assert_eq!(mapping.len(), 118);
    let ids: BTreeSet<_> = mapping.iter().map(|m| m.wordnet_id.as_str()).collect();
    assert_eq!(ids.len(), 118);
    assert_eq!(ids.first(), Some(&"n02085620"));
    assert_eq!(ids.last(), Some(&"n02113978"));
    let groups: BTreeSet<_> = mapping.iter().map(|m| m.group.clone()).collect();
    assert_eq!(groups.len(), 8);
    assert!(!groups.iter().any(|g| matches!(g, GroupName::Custom(_))));
}

#[test]
fn instrument_list_has_seventeen_classes() {
    let list = load_watchlist("instruments", data("instruments.txt")).unwrap();
    assert_eq!(list.len(), 17);
    assert!(list.entries.iter().all(|e| e.wordnet_id.is_some()));
}

#[test]
fn infant_list_has_thirty_classes() {
    let list = load_watchlist("infants", data("infants.txt")).unwrap();
    assert_eq!(list.len(), 30);
    assert_eq!(list.entries[0].label, "bassinet");
    assert!(list.entries.iter().all(|e| e.wordnet_id.is_some()));
}

#[test]
fn denylist_ships_empty() {
    assert!(read_term_list(data("denylist.txt")).unwrap().is_empty());
}

#[test]
fn example_config_is_valid() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let text = std::fs::read_to_string(root.join("audit.example.toml")).unwrap();
    let cfg = audit_cli::config::Config::parse(&text, Some(&root)).unwrap();
    cfg.check().unwrap();
    for p in [&cfg.paths.groups, &cfg.paths.ranking, &cfg.paths.denylist] {
        assert!(p.as_ref().unwrap().exists());
    }
    assert!(cfg.paths.watchlists["infants"].exists());
}
