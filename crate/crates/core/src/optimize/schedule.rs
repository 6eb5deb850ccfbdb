/// Multi-step decay: `lr0 · gamma^(number of milestones ≤ iter)`.
pub fn lr_schedule(iter: u64, lr0: f64, gamma: f64, milestones: &[u64]) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= iter).count();
    lr0 * gamma.powi(passed as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps() {
        assert_eq!(lr_schedule(50, 1e-3, 0.1, &[100, 200]), 1e-3);
        assert!((lr_schedule(150, 1e-3, 0.1, &[100, 200]) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(200, 1e-3, 0.1, &[100, 200]) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn trace_is_piecewise_constant_non_increasing() {
        let ms = [120, 480, 700];
        let trace: Vec<f64> = (0..1000).map(|i| lr_schedule(i, 3e-5, 0.1, &ms)).collect();
        let mut changes = 0;
        for w in trace.windows(2) {
            assert!(w[1] <= w[0]);
            if w[1] != w[0] {
                changes += 1;
            }
        }
        assert_eq!(changes, ms.len());
    }
}
