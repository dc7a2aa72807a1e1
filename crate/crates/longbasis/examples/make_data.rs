//! Regenerate the bundled data under `data/`: fixtures of the published
//! parameter tables and the synthetic two-population panel.
//!
//! cargo run -p longbasis --example make_data -- <data dir>

use std::fs::{self, File};
use std::path::PathBuf;

use longbasis::panel_csv::write_panels;
use longbasis::params::{jump_to_table, ParamTable};
use longbasis_core::alt::{
    published_jump_pmf, published_zhou_params, PUBLISHED_BOOK_LC_A, PUBLISHED_BOOK_LC_B, PUBLISHED_CAE_BOOK_A,
};
use longbasis_core::jump::ew_males_reference_params;
use longbasis_core::renewal::RenewalFamily;
use longbasis_core::synthetic::{generate, SyntheticWorld, EW_MALES_A, EW_MALES_B};
use longbasis_core::Span;

/// Seed of the bundled synthetic panel.
const SYNTHETIC_SEED: u64 = 2016;

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    let fixtures = dir.join("fixtures");
    fs::create_dir_all(&fixtures).unwrap();
    let save = |name: &str, t: &ParamTable| t.write(File::create(fixtures.join(name)).unwrap()).unwrap();

    let mut t2 = ParamTable::default();
    t2.push_series("a", 60, &EW_MALES_A);
    t2.push_series("b", 60, &EW_MALES_B);
    t2.rows.extend(jump_to_table(&ew_males_reference_params(), RenewalFamily::Gamma).rows);
    save("published_reference.csv", &t2);

    let mut a1 = ParamTable::default();
    a1.push_series("a", 60, &PUBLISHED_BOOK_LC_A);
    a1.push_series("b", 60, &PUBLISHED_BOOK_LC_B);
    save("published_book_lc.csv", &a1);

    let p = published_zhou_params(Span { first: 60, last: 89 }, EW_MALES_A.to_vec(), EW_MALES_B.to_vec());
    let mut a2 = ParamTable::default();
    for (name, v) in [
        ("mu_k", p.mu_k),
        ("v_z", p.v_z),
        ("mu_y1", p.mu_y1),
        ("mu_y2", p.mu_y2),
        ("v_y1", p.v_y1),
        ("v_y2", p.v_y2),
        ("mu_dk", p.mu_dk),
        ("phi_dk", p.phi_dk),
    ] {
        a2.push(name, 0, v);
    }
    // The (1,0) state is not printed; loaders fill in the remaining mass.
    let pmf = published_jump_pmf();
    for i in [0, 1, 3] {
        a2.push("pmf", i as i64, pmf[i]);
    }
    save("published_jump_model.csv", &a2);

    let mut a3 = ParamTable::default();
    a3.push_series("a", 60, &PUBLISHED_CAE_BOOK_A);
    save("published_cae_book.csv", &a3);

    let panels = generate(&SyntheticWorld::ew_style(), SYNTHETIC_SEED, true).unwrap();
    let synthetic = dir.join("synthetic");
    fs::create_dir_all(&synthetic).unwrap();
    write_panels(File::create(synthetic.join("panels.csv")).unwrap(), &[&panels.reference, &panels.book]).unwrap();
}
