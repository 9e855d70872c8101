@problemName Numbers
@classLabel true a b
@data
1,2,3:a
1,2x,3:b
