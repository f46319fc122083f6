//! Shortest routes on an occupancy grid, with and without safety inflation.

use medusa::frames::EnuPoint;
use medusa::planner::{inflate, plan};
use medusa::worldsim::OccupancyGrid;

const MAP: [&str; 8] = [
    "..........",
    "..####....",
    "..####....",
    "......##..",
    "......##..",
    "..#.......",
    "..#...###.",
    "..........",
];

fn show(grid: &OccupancyGrid, path: &[EnuPoint]) {
    for r in (0..grid.height()).rev() {
        let line: String = (0..grid.width())
            .map(|c| {
                let on_path = path.iter().any(|p| grid.cell_of(p) == Some((r, c)));
                match (grid.is_navigable(r, c), on_path) {
                    (_, true) => '*',
                    (true, false) => '.',
                    (false, false) => '#',
                }
            })
            .collect();
        println!("  {line}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = OccupancyGrid::from_ascii(EnuPoint::origin(), 10.0, &MAP)?;
    let start = grid.center(0, 0);
    let goal = grid.center(7, 9);

    let route = plan(&grid, start, goal)?;
    println!(
        "route: {} cells, {} straight + {} diagonal steps, {:.1} m",
        route.cells.len(),
        route.steps.straight,
        route.steps.diagonal,
        route.cost
    );
    show(&grid, &route.cells);

    let safe = inflate(&grid, 10.0);
    match plan(&safe, start, goal) {
        Ok(r) => {
            println!("with 10 m clearance: {:.1} m", r.cost);
            show(&safe, &r.cells);
        }
        Err(e) => println!("with 10 m clearance: {e}"),
    }
    Ok(())
}
