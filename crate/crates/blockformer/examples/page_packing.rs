// Two-stage page packing: first-fit decreasing within each weight-role
// class, then a merge pass that pools the non-full pages across classes.

use blockformer::store::{pack_two_stage, PackItem};
use blockformer::Result;

fn item(id: usize, class: &str, len: usize) -> PackItem {
    PackItem {
        stored_id: id,
        set_name: format!("blk0.{class}"),
        block_key: (id, 0),
        class: class.to_string(),
        bytes: vec![0u8; len],
    }
}

fn show(label: &str, pages: &[blockformer::store::Page]) {
    println!("{label}: {} pages", pages.len());
    for p in pages {
        let members: Vec<String> = p
            .entries
            .iter()
            .map(|e| format!("{}#{}", e.set_name, e.stored_id))
            .collect();
        println!(
            "  page {}: {}/{} bytes used, entries {:?}",
            p.page_id,
            p.used(),
            p.capacity_bytes,
            members
        );
    }
}

fn main() -> Result<()> {
    // Ten equal 100-byte blocks of one class into 400-byte pages: FFD fills
    // four per page, so ten blocks need exactly three pages.
    let items: Vec<PackItem> = (0..10).map(|i| item(i, "wq", 100)).collect();
    let pages = pack_two_stage(items, 400)?;
    show("10 x 100 B, one class, capacity 400", &pages);

    // Two classes, each leaving a half-full page after stage one. The merge
    // stage pools those leftovers and packs them together into one page.
    let items = vec![
        item(0, "wq", 150),
        item(1, "wq", 150),
        item(2, "wk", 150),
        item(3, "wk", 150),
    ];
    let pages = pack_two_stage(items, 600)?;
    show("2 + 2 blocks of 150 B in two classes, capacity 600", &pages);

    // Mixed sizes in one class: decreasing order lets small blocks backfill.
    let sizes = [300, 110, 100, 90, 280, 120];
    let items: Vec<PackItem> = sizes.iter().enumerate().map(|(i, &s)| item(i, "w0", s)).collect();
    let pages = pack_two_stage(items, 500)?;
    show("mixed sizes, capacity 500", &pages);
    let total: usize = sizes.iter().sum();
    println!(
        "  {} payload bytes over {} pages = {:.0}% fill",
        total,
        pages.len(),
        100.0 * total as f64 / (pages.len() * 500) as f64
    );
    Ok(())
}
