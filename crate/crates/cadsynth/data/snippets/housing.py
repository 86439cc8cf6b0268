import cadquery as cq

length = 60.0
width = 40.0
height = 30.0
wall = 3.0
boss_diameter = 8.0
screw_diameter = 3.0
corner_radius = 4.0

shell = (
    cq.Workplane("XY")
    .rect(length, width)
    .extrude(height)
    .edges("|Z")
    .fillet(corner_radius)
    .faces(">Z")
    .shell(-wall)
)
boss_points = [(sx * (length / 2 - wall - boss_diameter / 2), sy * (width / 2 - wall - boss_diameter / 2)) for sx in (-1, 1) for sy in (-1, 1)]
bosses = cq.Workplane("XY").workplane(offset=wall).pushPoints(boss_points).circle(boss_diameter / 2).extrude(height - 2 * wall)
body = shell.union(bosses)
result = body.faces(">Z").workplane().pushPoints(boss_points).hole(screw_diameter, height - 2 * wall)
