use std::collections::{BTreeSet, HashMap};

use super::{serialize_page_xml, Page, Schematic};
use crate::hashing::sha256_hex;

/// Hex SHA-256 of the page's canonical XML.
pub fn page_hash(page: &Page) -> String {
    sha256_hex(serialize_page_xml(page))
}

/// Ids of pages in `head` whose canonical hash differs from the same page in
/// `base`, plus pages that exist only in `head`.
pub fn diff_pages(base: &Schematic, head: &Schematic) -> BTreeSet<String> {
    let base_hashes: HashMap<&str, String> = base
        .pages
        .iter()
        .map(|p| (p.id.as_str(), page_hash(p)))
        .collect();
    head.pages
        .iter()
        .filter(|p| base_hashes.get(p.id.as_str()) != Some(&page_hash(p)))
        .map(|p| p.id.clone())
        .collect()
}
