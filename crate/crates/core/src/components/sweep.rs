use super::{Parameter, Sweeper};

/// New value for one field of one pulse (or qubit, for bias).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterUpdate {
    pub parameter: Parameter,
    pub index: usize,
    pub value: f64,
}

/// Parameter values of one grid point.
pub type Assignment = Vec<ParameterUpdate>;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    /// Row-major, first sweeper outermost.
    pub assignments: Vec<Assignment>,
    pub shape: Vec<usize>,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Endpoint-inclusive linear spacing, one array per swept parameter.
pub fn sweeper_values(sweeper: &Sweeper) -> Vec<Vec<f64>> {
    sweeper
        .starts
        .iter()
        .zip(&sweeper.stops)
        .map(|(&start, &stop)| linspace(start, stop, sweeper.expts))
        .collect()
}

fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![start; n];
    }
    let step = (stop - start) / (n - 1) as f64;
    (0..n)
        .map(|k| {
            if k == n - 1 {
                stop
            } else {
                start + k as f64 * step
            }
        })
        .collect()
}

/// Cartesian product over sweepers.
///
/// Parameters inside one sweeper are updated together; different sweepers
/// nest with sweeper 0 as the outermost loop. No sweepers gives a single
/// empty assignment.
pub fn sweep_grid(sweepers: &[Sweeper]) -> SweepGrid {
    let values: Vec<Vec<Vec<f64>>> = sweepers.iter().map(sweeper_values).collect();
    let shape: Vec<usize> = sweepers.iter().map(|s| s.expts).collect();
    let total: usize = shape.iter().product();

    let mut assignments = Vec::with_capacity(total);
    let mut counter = vec![0usize; sweepers.len()];
    for _ in 0..total {
        let mut assignment = Vec::new();
        for (s, sweeper) in sweepers.iter().enumerate() {
            for (j, (&parameter, &index)) in
                sweeper.parameters.iter().zip(&sweeper.indexes).enumerate()
            {
                assignment.push(ParameterUpdate {
                    parameter,
                    index,
                    value: values[s][j][counter[s]],
                });
            }
        }
        assignments.push(assignment);

        // odometer increment, last sweeper fastest
        for s in (0..counter.len()).rev() {
            counter[s] += 1;
            if counter[s] < shape[s] {
                break;
            }
            counter[s] = 0;
        }
    }
    SweepGrid { assignments, shape }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inclusive_linear_spacing() {
        let s = Sweeper::single(Parameter::Amplitude, 0, 0.0, 1.0, 5);
        assert_eq!(sweeper_values(&s), vec![vec![0.0, 0.25, 0.5, 0.75, 1.0]]);
    }

    #[test]
    fn degenerate_range_repeats_start() {
        let s = Sweeper::single(Parameter::Amplitude, 0, 2.0, 2.0, 3);
        assert_eq!(sweeper_values(&s), vec![vec![2.0, 2.0, 2.0]]);
        let one = Sweeper::single(Parameter::Amplitude, 0, 2.0, 9.0, 1);
        assert_eq!(sweeper_values(&one), vec![vec![2.0]]);
    }

    #[test]
    fn frequency_grid_has_constant_step() {
        let s = Sweeper::single(Parameter::Frequency, 0, 5e9, 5.1e9, 101);
        let v = &sweeper_values(&s)[0];
        assert_eq!(v.len(), 101);
        for w in v.windows(2) {
            assert_eq!(w[1] - w[0], 1e6);
        }
    }

    fn nested_loop_oracle(sweepers: &[Sweeper]) -> Vec<Vec<usize>> {
        // brute-force index tuples, first sweeper outermost
        let mut out = vec![vec![]];
        for s in sweepers {
            let mut next = Vec::new();
            for prefix in &out {
                for k in 0..s.expts {
                    let mut p = prefix.clone();
                    p.push(k);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }

    #[test]
    fn two_sweepers_nest_outer_first() {
        let a = Sweeper::single(Parameter::Amplitude, 0, 0.0, 2.0, 3);
        let b = Sweeper::single(Parameter::Start, 1, 0.0, 3.0, 4);
        let grid = sweep_grid(&[a, b]);
        assert_eq!(grid.shape, vec![3, 4]);
        assert_eq!(grid.len(), 12);
        let oracle = nested_loop_oracle(&[
            Sweeper::single(Parameter::Amplitude, 0, 0.0, 2.0, 3),
            Sweeper::single(Parameter::Start, 1, 0.0, 3.0, 4),
        ]);
        for (assignment, idx) in grid.assignments.iter().zip(&oracle) {
            // values equal the indices by construction of the ranges
            assert_eq!(assignment[0].value, idx[0] as f64);
            assert_eq!(assignment[1].value, idx[1] as f64);
        }
        assert_eq!(grid.assignments[4][0].value, 1.0);
        assert_eq!(grid.assignments[4][1].value, 0.0);
    }

    #[test]
    fn simultaneous_parameters_share_a_point() {
        let s = Sweeper {
            parameters: vec![Parameter::Amplitude, Parameter::Frequency],
            indexes: vec![0, 0],
            starts: vec![0.0, 1e9],
            stops: vec![0.4, 2e9],
            expts: 5,
        };
        let grid = sweep_grid(&[s]);
        assert_eq!(grid.len(), 5);
        for a in &grid.assignments {
            assert_eq!(a.len(), 2);
        }
        assert_eq!(grid.assignments[4][1].value, 2e9);
    }

    #[test]
    fn empty_sweeper_list_is_the_bare_sequence() {
        let grid = sweep_grid(&[]);
        assert_eq!(grid.assignments, vec![Vec::<ParameterUpdate>::new()]);
        assert!(grid.shape.is_empty());
    }

    proptest! {
        #[test]
        fn grid_size_is_product_of_expts(expts in prop::collection::vec(1usize..6, 0..4)) {
            let sweepers: Vec<Sweeper> = expts
                .iter()
                .enumerate()
                .map(|(k, &n)| Sweeper::single(Parameter::Start, k, 0.0, 1.0, n))
                .collect();
            let grid = sweep_grid(&sweepers);
            prop_assert_eq!(grid.len(), expts.iter().product::<usize>());
            let oracle = nested_loop_oracle(&sweepers);
            for (assignment, idx) in grid.assignments.iter().zip(&oracle) {
                for (s, k) in idx.iter().enumerate() {
                    let v = sweeper_values(&sweepers[s])[0][*k];
                    prop_assert_eq!(assignment[s].value, v);
                }
            }
        }
    }
}
