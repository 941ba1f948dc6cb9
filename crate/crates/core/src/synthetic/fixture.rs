//! The well-separated profile fixture.
//!
//! Nine subjects over five categories (background plus four objects), in
//! three families of three. A family shares its preferred object category
//! (affinity 2.0 vs 0.3), center spread and saccade amplitude: compact
//! (0.15, 0.08), medium (0.30, 0.18) and wide (0.50, 0.30). Members of a
//! family differ in base fixation duration, which rises geometrically from
//! 120 ms to 1430 ms across the nine profiles, so duration also tells the
//! families apart. Shared: saccade std 0.06, duration gain 20 ms per unit
//! interest, revisit penalty 0.8, stop probability 0.05, temperature 0.35.
//! Parameter values live in `fixtures/separable_profiles.json`.

use super::SubjectProfile;

pub const FIXTURE_CHANNELS: usize = 5;

const PROFILES_JSON: &str = include_str!("../../fixtures/separable_profiles.json");

pub fn separable_profiles() -> Vec<SubjectProfile> {
    serde_json::from_str(PROFILES_JSON).expect("bundled fixture parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FREE_VIEWING;
    use crate::synthetic::generate_corpus;

    #[test]
    fn fixture_is_valid() {
        let p = separable_profiles();
        assert_eq!(p.len(), 9);
        p.iter().for_each(|p| p.validate().unwrap());
        assert!(p.iter().all(|p| p.channel_affinity.len() == FIXTURE_CHANNELS));
    }

    /// Mean saccade length, mean log duration, mean distance to center and
    /// the share of fixations on each object category.
    fn stats(fix: &[crate::data::Fixation], scene: &crate::synthetic::SceneGrid) -> Vec<f64> {
        let n = fix.len() as f64;
        let sacc: Vec<f64> = fix
            .windows(2)
            .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
            .collect();
        let sacc_mean = if sacc.is_empty() { 0.0 } else { sacc.iter().sum::<f64>() / sacc.len() as f64 };
        let dur = fix.iter().map(|f| f64::from(f.duration_ms).ln()).sum::<f64>() / n;
        let center = fix.iter().map(|f| ((f.x - 0.5).powi(2) + (f.y - 0.5).powi(2)).sqrt()).sum::<f64>() / n;
        let mut out = vec![sacc_mean, dur, center];
        for c in 1..FIXTURE_CHANNELS {
            let hits = fix.iter().filter(|f| usize::from(scene.labels[scene.cell_at(f.x, f.y)]) == c).count();
            out.push(hits as f64 / n);
        }
        out
    }

    #[test]
    fn behavioral_statistics_separate_subjects() {
        let profiles = separable_profiles();
        let k = profiles.len();
        let corpus = generate_corpus(&profiles, 100, &[FREE_VIEWING.to_string()], 10, 4).unwrap();
        // scenes 0..49 fit the centroids, 50..99 are classified
        let is_train = |scene: &str| scene < "scene050";
        let feats: Vec<(usize, bool, Vec<f64>)> = corpus
            .instances
            .iter()
            .map(|i| (i.subject_id[1..].parse().unwrap(), is_train(&i.scene_id), stats(&i.fixations, &corpus.scenes[&i.scene_id])))
            .collect();
        let dims = feats[0].2.len();
        let mut centroids = vec![vec![0.0; dims]; k];
        let mut counts = vec![0.0; k];
        for (s, train, f) in &feats {
            if *train {
                centroids[*s].iter_mut().zip(f).for_each(|(c, v)| *c += v);
                counts[*s] += 1.0;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= n);
        }
        // standardize each statistic by its overall spread
        let scale: Vec<f64> = (0..dims)
            .map(|d| {
                let mean = feats.iter().map(|f| f.2[d]).sum::<f64>() / feats.len() as f64;
                (feats.iter().map(|f| (f.2[d] - mean).powi(2)).sum::<f64>() / feats.len() as f64).sqrt()
            })
            .collect();
        let dist = |f: &[f64], c: &[f64]| -> f64 { (0..dims).map(|d| ((f[d] - c[d]) / scale[d]).powi(2)).sum() };
        let (mut member_hit, mut family_hit, mut total) = (0, 0, 0);
        for (s, _, f) in feats.iter().filter(|f| !f.1) {
            let best = (0..k).min_by(|&a, &b| dist(f, &centroids[a]).total_cmp(&dist(f, &centroids[b]))).unwrap();
            family_hit += usize::from(best / 3 == s / 3);
            // within the family, by mean log duration alone
            let fam = (s / 3) * 3;
            let member = (fam..fam + 3)
                .min_by(|&a, &b| (f[1] - centroids[a][1]).abs().total_cmp(&(f[1] - centroids[b][1]).abs()))
                .unwrap();
            member_hit += usize::from(member == *s);
            total += 1;
        }
        let (member, family) = (member_hit as f64 / total as f64, family_hit as f64 / total as f64);
        assert!(member >= 0.9, "within-family duration accuracy {member}");
        assert!(family >= 0.85, "family accuracy {family}");
    }
}
