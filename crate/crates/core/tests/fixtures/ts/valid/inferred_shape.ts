@problemName Inferred
@classLabel true 0 1
@data
1e-3,2.5E2,-3.0:4,5,6:0
7,8,9:-1e1,0,1e0:1
