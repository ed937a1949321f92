mod common;

use common::draws;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn responsibility_rows_sum_to_one(d in draws(), n in 20usize..200) {
        common::row_normalization(d, n).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn birth_and_death_ratios_are_reciprocal(d in draws(), n in 5usize..120) {
        common::reversibility(d, n).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn doubling_the_band_cutoff_changes_little(d in draws(), n in 50usize..300) {
        common::cutoff_insensitivity(d, n).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 3, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn fixed_seeds_are_reproducible(seed in any::<u64>()) {
        common::determinism(seed).map_err(TestCaseError::fail)?;
    }
}
