// ln(1 + x) and ln(sigmoid(x)) at 256-bit precision, rounded to f64.
// Each row is (x, f64 bits of the result).

pub const LOG1P: [(f64, u64); 37] = [
    (1.0, 0x3fe62e42fefa39ef),
    (0.1, 0x3fb8663f793c46c7),
    (-0.1, 0xbfbaf8e8210a415e),
    (0.01, 0x3f8460d6ccca3677),
    (-0.01, 0xbf8495453e6fd4b7),
    (0.001, 0x3f5060354f8c3ebf),
    (-0.001, 0xbf5064670d979b6f),
    (0.0001, 0x3f1a368d06580001),
    (-0.0001, 0xbf1a3738d2cf1fef),
    (1e-05, 0x3ee4f8aea9ae7317),
    (-1e-05, 0xbee4f8bc681e6006),
    (1e-06, 0x3eb0c6f713f927aa),
    (-1e-06, 0xbeb0c6f82d72bfbd),
    (1e-07, 0x3e7ad7f2843813db),
    (-1e-07, 0xbe7ad7f2b1414ae8),
    (1e-08, 0x3e45798ee0636111),
    (-1e-08, 0xbe45798ee3fdb764),
    (1e-09, 0x3e112e0be801f1d9),
    (-1e-09, 0xbe112e0be84bbb51),
    (1e-10, 0x3ddb7cdfd9d1d693),
    (-1e-10, 0xbddb7cdfd9dda4e3),
    (1e-11, 0x3da5fd7fe178ebb0),
    (-1e-11, 0xbda5fd7fe179dd7a),
    (1e-12, 0x3d719799812de065),
    (-1e-12, 0xbd719799812df3bd),
    (1e-13, 0x3d3c25c2684974f6),
    (-1e-13, 0xbd3c25c26849780e),
    (1e-14, 0x3d06849b86a12b7b),
    (-1e-14, 0xbd06849b86a12bbb),
    (1e-15, 0x3cd203af9ee75613),
    (-1e-15, 0xbcd203af9ee75619),
    (1e-16, 0x3c9cd2b297d889bc),
    (-1e-16, 0xbc9cd2b297d889bc),
    (1e-17, 0x3c670ef54646d497),
    (-1e-17, 0xbc670ef54646d497),
    (1e-18, 0x3c32725dd1d243ac),
    (-1e-18, 0xbc32725dd1d243ac),
];

pub const LOG_SIGMOID: [(f64, u64); 117] = [
    (-40.0, 0xc044000000000000),
    (-39.0, 0xc043800000000000),
    (-38.0, 0xc043000000000000),
    (-37.0, 0xc042800000000000),
    (-36.0, 0xc042000000000000),
    (-35.0, 0xc041800000000000),
    (-34.0, 0xc041000000000000),
    (-33.0, 0xc040800000000001),
    (-32.0, 0xc040000000000002),
    (-31.0, 0xc03f00000000000a),
    (-30.0, 0xc03e00000000001a),
    (-29.0, 0xc03d000000000048),
    (-28.0, 0xc03c0000000000c3),
    (-27.0, 0xc03b000000000211),
    (-26.0, 0xc03a00000000059e),
    (-25.0, 0xc039000000000f45),
    (-24.0, 0xc038000000002982),
    (-23.0, 0xc0370000000070d5),
    (-22.0, 0xc0360000000132b5),
    (-21.0, 0xc0350000000341b6),
    (-20.0, 0xc03400000008da43),
    (-19.0, 0xc033000000181057),
    (-18.0, 0xc03200000041698a),
    (-17.0, 0xc031000000b1cf18),
    (-16.0, 0xc030000001e355ba),
    (-15.0, 0xc02e00000a43ae37),
    (-14.0, 0xc02c00001be6c63b),
    (-13.0, 0xc02a00004bd80f50),
    (-12.0, 0xc0280000ce2a3858),
    (-11.0, 0xc0260002306951be),
    (-10.0, 0xc0240005f3559328),
    (-9.0, 0xc02200102cb0bcfd),
    (-8.0, 0xc020002bf65ece0f),
    (-7.0, 0xc01c00eeef7a7103),
    (-6.0, 0xc0180288fc6ace96),
    (-5.0, 0xc01406e06368916a),
    (-4.0, 0xc0101295e50b53b6),
    (-3.0, 0xc0086381c3f0115c),
    (-2.0, 0xc00103f2d54301d5),
    (-1.0, 0xbff5031eafefb049),
    (-0.1, 0xbfe7d218f1c8904f),
    (-0.01, 0xbfe65752f86558b3),
    (-0.001, 0xbfe6325bd58ad4ae),
    (-0.0001, 0xbfe62eabdb31b2d7),
    (-1e-05, 0xbfe62e4d7b56b62f),
    (-1e-06, 0xbfe62e440b69b860),
    (-1e-07, 0xbfe62e4319d22c95),
    (-1e-08, 0xbfe62e4301a96bcc),
    (-1e-09, 0xbfe62e42ff3ef21f),
    (-1e-10, 0xbfe62e42ff011927),
    (-1e-11, 0xbfe62e42fefae9db),
    (-1e-12, 0xbfe62e42fefa4b87),
    (-1e-13, 0xbfe62e42fefa3bb2),
    (-1e-14, 0xbfe62e42fefa3a1c),
    (-1e-15, 0xbfe62e42fefa39f4),
    (-1e-16, 0xbfe62e42fefa39f0),
    (-1e-17, 0xbfe62e42fefa39ef),
    (-1e-18, 0xbfe62e42fefa39ef),
    (0.0, 0xbfe62e42fefa39ef),
    (1e-18, 0xbfe62e42fefa39ef),
    (1e-17, 0xbfe62e42fefa39ef),
    (1e-16, 0xbfe62e42fefa39ef),
    (1e-15, 0xbfe62e42fefa39eb),
    (1e-14, 0xbfe62e42fefa39c2),
    (1e-13, 0xbfe62e42fefa382d),
    (1e-12, 0xbfe62e42fefa2858),
    (1e-11, 0xbfe62e42fef98a03),
    (1e-10, 0xbfe62e42fef35ab7),
    (1e-09, 0xbfe62e42feb581c0),
    (1e-08, 0xbfe62e42fc4b0813),
    (1e-07, 0xbfe62e42e4224760),
    (1e-06, 0xbfe62e41f28ac44a),
    (1e-05, 0xbfe62e3882a12d4b),
    (0.0001, 0xbfe62dda241a59f5),
    (0.001, 0xbfe62a2aaea15bd9),
    (0.01, 0xbfe605677346a061),
    (0.1, 0xbfe49ee5be955d1c),
    (1.0, 0xbfd40c7abfbec124),
    (2.0, 0xbfc03f2d54301d49),
    (3.0, 0xbfa8e070fc045701),
    (4.0, 0xbf9295e50b53b654),
    (5.0, 0xbf7b818da245a728),
    (6.0, 0xbf6447e35674b30e),
    (7.0, 0xbf4dddef4e20532b),
    (8.0, 0xbf35fb2f67077130),
    (9.0, 0xbf202cb0bcfccbe5),
    (10.0, 0xbf07cd564c9e0d19),
    (11.0, 0xbef1834a8df20647),
    (12.0, 0xbed9c5470b033d21),
    (13.0, 0xbec2f603d41316a9),
    (14.0, 0xbeabe6c63b109c39),
    (15.0, 0xbe94875c6d7a2b67),
    (16.0, 0xbe7e355b9e6a20f7),
    (17.0, 0xbe6639e30fa26825),
    (18.0, 0xbe505a628a52c72b),
    (19.0, 0xbe381056fe0acec4),
    (20.0, 0xbe21b48655a5141e),
    (21.0, 0xbe0a0db0d0b34762),
    (22.0, 0xbdf32b48bf060201),
    (23.0, 0xbddc3527e42dc35a),
    (24.0, 0xbdc4c1078fe773cf),
    (25.0, 0xbdae8a37a45eda02),
    (26.0, 0xbd967852a7003f25),
    (27.0, 0xbd80885298766d85),
    (28.0, 0xbd6853f01d6d4a7b),
    (29.0, 0xbd51e642baeb8220),
    (30.0, 0xbd3a56e0c2ac7e1a),
    (31.0, 0xbd236121e24d3b5c),
    (32.0, 0xbd0c8464f7616435),
    (33.0, 0xbcf4fb547c775d9a),
    (34.0, 0xbcdee001eed62a98),
    (35.0, 0xbcc6b7719a59f0de),
    (36.0, 0xbcb0b6c3afdde063),
    (37.0, 0xbc9898471fca6055),
    (38.0, 0xbc82188ad6ae3303),
    (39.0, 0xbc6aa0de4bf35b38),
    (40.0, 0xbc539792499b1a24),
];
