use pegsim::{reset, sample_domains, scripted_expert, step, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Margin check over a bigger family than the unit test: the data-collection
// regime has to work across domain draws, not just one seed.
#[test]
fn expert_success_margin_across_families() {
    for family_seed in [7u64, 40, 99] {
        let set = sample_domains(12, 4, 4, family_seed).unwrap();
        let mut successes = 0u32;
        let mut episodes = 0u32;
        for spec in set.all() {
            for ep in 0..50 {
                let seed = pegsim::episode_seed(1234, spec.domain_id, ep);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut s = reset(spec, Scenario::One, &mut rng);
                while !s.done {
                    let a = scripted_expert(&s, spec, &mut rng);
                    step(&mut s, spec, a).unwrap();
                }
                episodes += 1;
                successes += s.success as u32;
            }
        }
        let rate = successes as f32 / episodes as f32;
        assert!(
            rate >= 0.95,
            "family {family_seed}: expert success {rate} below 0.95"
        );
        println!("family {family_seed}: expert success {rate:.4}");
    }
}
