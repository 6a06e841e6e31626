//! Fixtures shared by the integration targets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0 >> 33
    }
    fn pick<'a>(&mut self, items: &[&'a str]) -> &'a str {
        items[self.next() as usize % items.len()]
    }
}

/// Survey and operations files sharing `shared` keys; the first file has
/// `survey_only` extra respondents, the second `ops_only` extra accounts.
pub fn fixture(dir: &Path, shared: usize, survey_only: usize, ops_only: usize) {
    let mut rng = Lcg(42);
    let mut survey = String::from(
        "email,choice,age,gender,marital,education,income,household_size,cars,purpose,prior_mode,in_vehicle\n",
    );
    for i in 0..shared + survey_only {
        let email = if i < shared {
            format!("User{i}@Example.com")
        } else {
            format!("survey{i}@example.com")
        };
        let _ = writeln!(
            survey,
            "{email},{},{},{},{},{},{},{},{},{},{},{}",
            1 + rng.next() % 3,
            rng.pick(&["Young", "Adults", "Middle-aged", "Old"]),
            rng.pick(&["Male", "Female"]),
            rng.pick(&["Single", "Married", "Divorced"]),
            rng.pick(&["Secondary School", "Diploma", "Undergraduate", "Graduate"]),
            rng.pick(&["Under 10", "20 to 29.999", "40 to 49.999", "60 and over"]),
            1 + rng.next() % 6,
            rng.next() % 3,
            rng.pick(&["Work-Based", "Nonwork-Based", "Mixed Purposes"]),
            rng.pick(&["Active Mode", "Car", "FRT", "Not Applicable"]),
            rng.pick(&["Less than FRT", "Equal to FRT", "More than FRT"]),
        );
    }
    let mut ops = String::from("email,assigned_trips,unassigned_trips,waiting_time\n");
    for i in 0..shared + ops_only {
        let email = if i < shared {
            format!("  user{i}@example.com ")
        } else {
            format!("ops{i}@example.com")
        };
        let assigned = [2.0, 20.0, 60.0][(rng.next() % 3) as usize] + (rng.next() % 5) as f64;
        let unassigned =
            [0.0, 10.0, 25.0, 50.0][(rng.next() % 4) as usize] + (rng.next() % 3) as f64;
        let waiting =
            [5.0, 15.0, 30.0, 60.0][(rng.next() % 4) as usize] + (rng.next() % 4) as f64 * 0.5;
        let _ = writeln!(ops, "\"{email}\",{assigned},{unassigned},{waiting}");
    }
    fs::write(dir.join("survey.csv"), survey).unwrap();
    fs::write(dir.join("ops.csv"), ops).unwrap();
}
