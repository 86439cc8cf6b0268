import cadquery as cq

leg_length = 50.0
leg_height = 40.0
thickness = 6.0
depth = 30.0
hole_diameter = 6.0
gusset_size = 18.0

profile = (
    cq.Workplane("XZ")
    .polyline([(0, 0), (leg_length, 0), (leg_length, thickness), (thickness, thickness), (thickness, leg_height), (0, leg_height)])
    .close()
    .extrude(-depth)
)
gusset = (
    cq.Workplane("XZ")
    .polyline([(thickness, thickness), (thickness + gusset_size, thickness), (thickness, thickness + gusset_size)])
    .close()
    .extrude(-thickness)
    .translate((0, depth / 2 - thickness / 2, 0))
)
body = profile.union(gusset)
body = body.faces("<Z").workplane().pushPoints([(leg_length * 0.7, depth / 2)]).hole(hole_diameter)
body = body.faces("<X").workplane().pushPoints([(depth / 2, leg_height * 0.7)]).hole(hole_diameter)
result = body.edges("|Y").fillet(1.0)
